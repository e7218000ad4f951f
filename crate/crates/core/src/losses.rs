//! Training losses over a single image and their gradients with respect to
//! the raw scores.
//!
//! All `-log` terms clamp their argument below at [`LossConfig::eps`]. Gradients
//! are the analytic gradients of the unclamped expressions, so a saturated wrong
//! prediction still receives a finite, non-zero signal.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectness::ObjectnessMap;
use crate::seg::{softmax, ClassCatalog, LabelMap, ScoreMap, SoftmaxMap, IGNORE};
use crate::supervision::{SupervisionKind, SupervisionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Lower clamp for every log argument.
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-12
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { eps: default_eps() }
    }
}

/// A loss value and its gradient, laid out like the [`ScoreMap`] it was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValue {
    fn zero(len: usize) -> Self {
        LossValue { value: 0.0, grad: vec![0.0; len] }
    }

    /// `self + weight * other`, elementwise on the gradient.
    pub fn add_scaled(&mut self, other: &LossValue, weight: f64) {
        self.value += weight * other.value;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += weight * o;
        }
    }
}

/// Classes known present (`L`) and known absent (`L'`) in an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelsRepr", into = "LabelsRepr")]
pub struct ImageLevelLabels {
    present: BTreeSet<u8>,
    absent: BTreeSet<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsRepr {
    present: Vec<u8>,
    #[serde(default)]
    absent: Vec<u8>,
}

impl TryFrom<LabelsRepr> for ImageLevelLabels {
    type Error = Error;

    fn try_from(r: LabelsRepr) -> Result<Self> {
        ImageLevelLabels::new(r.present, r.absent)
    }
}

impl From<ImageLevelLabels> for LabelsRepr {
    fn from(l: ImageLevelLabels) -> Self {
        LabelsRepr { present: l.present.into_iter().collect(), absent: l.absent.into_iter().collect() }
    }
}

impl ImageLevelLabels {
    pub fn new(
        present: impl IntoIterator<Item = u8>,
        absent: impl IntoIterator<Item = u8>,
    ) -> Result<Self> {
        let present: BTreeSet<u8> = present.into_iter().collect();
        let absent: BTreeSet<u8> = absent.into_iter().collect();
        if present.is_empty() {
            return Err(Error::InvalidLabels("present set L is empty".into()));
        }
        if let Some(c) = present.intersection(&absent).next() {
            return Err(Error::InvalidLabels(format!("class {c} is both present and absent")));
        }
        if present.contains(&IGNORE) || absent.contains(&IGNORE) {
            return Err(Error::InvalidLabels("IGNORE is not a class".into()));
        }
        Ok(ImageLevelLabels { present, absent })
    }

    pub fn present(&self) -> &BTreeSet<u8> {
        &self.present
    }

    pub fn absent(&self) -> &BTreeSet<u8> {
        &self.absent
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.present.iter().chain(&self.absent).find(|&&c| c as usize >= num_classes) {
            Some(c) => Err(Error::InvalidLabels(format!("class {c} >= num_classes {num_classes}"))),
            None => Ok(()),
        }
    }
}

/// One supervised pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub pixel: usize,
    pub class: u8,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
    #[serde(default)]
    pub annotator: String,
}

impl Point {
    pub fn new(pixel: usize, class: u8, weight: f64) -> Self {
        Point { pixel, class, weight, rank: None, annotator: String::new() }
    }
}

/// Supervised pixels `I_s` with labels and weights `alpha_i`.
///
/// No `(pixel, class)` pair appears twice and every weight is positive and finite.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct WeightedPoints {
    points: Vec<Point>,
}

impl TryFrom<Vec<Point>> for WeightedPoints {
    type Error = Error;

    fn try_from(points: Vec<Point>) -> Result<Self> {
        WeightedPoints::new(points)
    }
}

impl From<WeightedPoints> for Vec<Point> {
    fn from(p: WeightedPoints) -> Self {
        p.points
    }
}

impl WeightedPoints {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &points {
            if !(p.weight > 0.0 && p.weight.is_finite()) {
                return Err(Error::InvalidPoints(format!(
                    "point at pixel {} has weight {}",
                    p.pixel, p.weight
                )));
            }
            if p.class == IGNORE {
                return Err(Error::InvalidPoints(format!("point at pixel {} is labeled IGNORE", p.pixel)));
            }
            if !seen.insert((p.pixel, p.class)) {
                return Err(Error::InvalidPoints(format!(
                    "duplicate point (pixel {}, class {})",
                    p.pixel, p.class
                )));
            }
        }
        Ok(WeightedPoints { points })
    }

    /// Like [`WeightedPoints::new`] but folds repeated `(pixel, class)` pairs
    /// into one point whose weight is the sum (first occurrence keeps rank and annotator).
    pub fn merged(points: Vec<Point>) -> Result<Self> {
        let mut out: Vec<Point> = Vec::with_capacity(points.len());
        for p in points {
            match out.iter_mut().find(|q| q.pixel == p.pixel && q.class == p.class) {
                Some(q) => q.weight += p.weight,
                None => out.push(p),
            }
        }
        WeightedPoints::new(out)
    }

    pub fn empty() -> Self {
        WeightedPoints { points: Vec::new() }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check_bounds(&self, num_pixels: usize) -> Result<()> {
        match self.points.iter().find(|p| p.pixel >= num_pixels) {
            Some(p) => Err(Error::InvalidPoints(format!(
                "pixel {} out of bounds for {num_pixels} pixels",
                p.pixel
            ))),
            None => Ok(()),
        }
    }
}

fn nll(probs: &SoftmaxMap, pixel: usize, class: usize, eps: f64) -> f64 {
    -probs.get(pixel, class).max(eps).ln()
}

/// Adds `weight * d(-log S_ic)/ds_i` into `grad`.
fn add_nll_grad(probs: &SoftmaxMap, pixel: usize, class: usize, weight: f64, grad: &mut [f64]) {
    let n = probs.num_classes();
    let row = &mut grad[pixel * n..(pixel + 1) * n];
    for (k, (g, &s)) in row.iter_mut().zip(probs.pixel(pixel)).enumerate() {
        let target = if k == class { 1.0 } else { 0.0 };
        *g += weight * (s - target);
    }
}

/// Pixel with the highest probability for `class`; ties go to the lowest index.
pub fn max_pixel(probs: &SoftmaxMap, class: usize) -> usize {
    let mut best = 0;
    for i in 1..probs.num_pixels() {
        if probs.get(i, class) > probs.get(best, class) {
            best = i;
        }
    }
    best
}

fn check_label_shape(scores: &ScoreMap, gt: &LabelMap) -> Result<()> {
    crate::seg::ensure_dims((scores.width(), scores.height()), (gt.width(), gt.height()))
}

/// Summed per-pixel cross-entropy against a full ground-truth map. IGNORE pixels contribute nothing.
pub fn loss_pix(scores: &ScoreMap, gt: &LabelMap, cfg: &LossConfig) -> Result<LossValue> {
    check_label_shape(scores, gt)?;
    gt.validate(scores.num_classes())?;
    let probs = softmax(scores);
    let mut out = LossValue::zero(scores.data().len());
    for (i, &g) in gt.labels().iter().enumerate() {
        if g == IGNORE {
            continue;
        }
        out.value += nll(&probs, i, g as usize, cfg.eps);
        add_nll_grad(&probs, i, g as usize, 1.0, &mut out.grad);
    }
    Ok(out)
}

fn loss_img_on(probs: &SoftmaxMap, labels: &ImageLevelLabels, eps: f64) -> LossValue {
    let n = probs.num_classes();
    let mut out = LossValue::zero(probs.num_pixels() * n);
    let w_present = 1.0 / labels.present.len() as f64;
    for &c in &labels.present {
        let c = c as usize;
        let t = max_pixel(probs, c);
        out.value += w_present * nll(probs, t, c, eps);
        add_nll_grad(probs, t, c, w_present, &mut out.grad);
    }
    if labels.absent.is_empty() {
        return out;
    }
    let w_absent = 1.0 / labels.absent.len() as f64;
    for &c in &labels.absent {
        let c = c as usize;
        let t = max_pixel(probs, c);
        let row = probs.pixel(t);
        // 1 - S_tc summed from the other classes keeps precision when S_tc is near 1.
        let rest: f64 = row.iter().enumerate().filter(|&(k, _)| k != c).map(|(_, s)| s).sum();
        let rest_c = rest.max(eps);
        out.value -= w_absent * rest_c.ln();
        let s_c = row[c];
        let g = &mut out.grad[t * n..(t + 1) * n];
        for (k, (gk, &s_k)) in g.iter_mut().zip(row).enumerate() {
            let delta = if k == c { 1.0 } else { 0.0 };
            *gk += w_absent * s_c * (delta - s_k) / rest_c;
        }
    }
    out
}

/// Image-level loss: each present class should be confident on its best
/// pixel, each absent class should not be confident anywhere.
///
/// The best pixel `t_c` is treated as a fixed selection when differentiating.
pub fn loss_img(scores: &ScoreMap, labels: &ImageLevelLabels, cfg: &LossConfig) -> Result<LossValue> {
    labels.validate(scores.num_classes())?;
    Ok(loss_img_on(&softmax(scores), labels, cfg.eps))
}

/// Image-level loss plus weighted cross-entropy on the supervised points.
pub fn loss_point(
    scores: &ScoreMap,
    points: &WeightedPoints,
    labels: &ImageLevelLabels,
    cfg: &LossConfig,
) -> Result<LossValue> {
    loss_point_weighted(scores, points, labels, 1.0, cfg)
}

/// [`loss_point`] with the image-level term scaled by `img_weight`.
pub fn loss_point_weighted(
    scores: &ScoreMap,
    points: &WeightedPoints,
    labels: &ImageLevelLabels,
    img_weight: f64,
    cfg: &LossConfig,
) -> Result<LossValue> {
    labels.validate(scores.num_classes())?;
    points.check_bounds(scores.num_pixels())?;
    for p in points.points() {
        if labels.absent.contains(&p.class) {
            return Err(Error::PointClassAbsent { pixel: p.pixel, class: p.class });
        }
        if !labels.present.contains(&p.class) {
            return Err(Error::PointClassNotPresent { pixel: p.pixel, class: p.class });
        }
    }
    let probs = softmax(scores);
    let mut out = LossValue::zero(scores.data().len());
    out.add_scaled(&loss_img_on(&probs, labels, cfg.eps), img_weight);
    for p in points.points() {
        out.value += p.weight * nll(&probs, p.pixel, p.class as usize, cfg.eps);
        add_nll_grad(&probs, p.pixel, p.class as usize, p.weight, &mut out.grad);
    }
    Ok(out)
}

/// Binary cross-entropy between the objectness prior and the total
/// object-class probability at each pixel, averaged over pixels.
pub fn loss_obj(
    scores: &ScoreMap,
    prior: &ObjectnessMap,
    catalog: &ClassCatalog,
    cfg: &LossConfig,
) -> Result<LossValue> {
    crate::seg::ensure_dims((scores.width(), scores.height()), (prior.width(), prior.height()))?;
    if catalog.num_classes() != scores.num_classes() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} classes", catalog.num_classes()),
            actual: format!("{} classes", scores.num_classes()),
        });
    }
    prior.validate()?;
    let n = scores.num_classes();
    let probs = softmax(scores);
    let is_obj: Vec<bool> = (0..n).map(|c| catalog.is_object(c as u8)).collect();
    let scale = 1.0 / probs.num_pixels() as f64;
    let (lo, hi) = (cfg.eps, 1.0 - cfg.eps);
    let mut out = LossValue::zero(scores.data().len());
    for (i, &p) in prior.values().iter().enumerate() {
        let row = probs.pixel(i);
        let (mut q, mut r) = (0.0, 0.0);
        for (k, &s) in row.iter().enumerate() {
            if is_obj[k] {
                q += s;
            } else {
                r += s;
            }
        }
        let qc = q.clamp(lo, hi);
        let rc = r.clamp(lo, hi);
        out.value -= scale * (p * qc.ln() + (1.0 - p) * rc.ln());
        let dq = -scale * (p / qc - (1.0 - p) / rc);
        let g = &mut out.grad[i * n..(i + 1) * n];
        for (k, (gk, &s)) in g.iter_mut().zip(row).enumerate() {
            let ind = if is_obj[k] { 1.0 } else { 0.0 };
            *gk += dq * s * (ind - q);
        }
    }
    Ok(out)
}

/// Loss for one training image: the base loss for the record's supervision
/// kind plus `lambda_obj` times the objectness loss.
///
/// A prior must be supplied exactly when `lambda_obj > 0`.
pub fn combined_loss(
    scores: &ScoreMap,
    record: &SupervisionRecord,
    prior: Option<&ObjectnessMap>,
    lambda_obj: f64,
    catalog: &ClassCatalog,
    cfg: &LossConfig,
) -> Result<LossValue> {
    if !(lambda_obj >= 0.0 && lambda_obj.is_finite()) {
        return Err(Error::Config(format!("lambda_obj must be a non-negative number, got {lambda_obj}")));
    }
    if (lambda_obj > 0.0) != prior.is_some() {
        return Err(Error::Config(format!(
            "objectness prior must be supplied exactly when lambda_obj > 0 (lambda_obj = {lambda_obj}, prior {})",
            if prior.is_some() { "present" } else { "missing" }
        )));
    }
    let mut out = base_loss(scores, record, cfg)?;
    if let Some(prior) = prior {
        if record.mask.is_some() && record.kind == SupervisionKind::Full {
            warn!("objectness term applied to a fully supervised image");
        }
        out.add_scaled(&loss_obj(scores, prior, catalog, cfg)?, lambda_obj);
    }
    Ok(out)
}

/// Dispatches on the supervision kind without any objectness term.
pub fn base_loss(scores: &ScoreMap, record: &SupervisionRecord, cfg: &LossConfig) -> Result<LossValue> {
    match record.kind {
        SupervisionKind::Full => loss_pix(scores, record.require_mask()?, cfg),
        SupervisionKind::ImageLevel => loss_img(scores, &record.labels, cfg),
        SupervisionKind::Points1 | SupervisionKind::PointsAll => {
            loss_point(scores, record.require_points()?, &record.labels, cfg)
        }
        SupervisionKind::Squiggles => loss_point(scores, &record.squiggle_points()?, &record.labels, cfg),
        SupervisionKind::HybridMember => match (&record.mask, &record.points) {
            (Some(mask), _) => loss_pix(scores, mask, cfg),
            (None, Some(points)) => loss_point(scores, points, &record.labels, cfg),
            (None, None) => Err(Error::InvalidRecord("hybrid member carries neither mask nor points".into())),
        },
    }
}
