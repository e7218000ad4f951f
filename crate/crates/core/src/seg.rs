//! Dense prediction value types.
//!
//! Every per-pixel array is row-major with pixel index `i = y * width + x`.
//! Per-class arrays are pixel-major: entry `(i, c)` lives at `i * num_classes + c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value for pixels excluded from both training and evaluation.
pub const IGNORE: u8 = 255;

/// Partition of the `N` labelable classes into object and background classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct ClassCatalog {
    is_object: Vec<bool>,
    names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogRepr {
    num_classes: usize,
    object_classes: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
}

impl TryFrom<CatalogRepr> for ClassCatalog {
    type Error = Error;

    fn try_from(repr: CatalogRepr) -> Result<Self> {
        let catalog = ClassCatalog::new(repr.num_classes, &repr.object_classes)?;
        match repr.names {
            Some(names) => catalog.with_names(names),
            None => Ok(catalog),
        }
    }
}

impl From<ClassCatalog> for CatalogRepr {
    fn from(c: ClassCatalog) -> Self {
        CatalogRepr {
            num_classes: c.num_classes(),
            object_classes: c.object_classes().collect(),
            names: c.names,
        }
    }
}

impl ClassCatalog {
    pub fn new(num_classes: usize, object_classes: &[u8]) -> Result<Self> {
        if num_classes < 2 || num_classes > IGNORE as usize {
            return Err(Error::InvalidCatalog(format!(
                "num_classes must be in 2..={}, got {num_classes}",
                IGNORE
            )));
        }
        let mut is_object = vec![false; num_classes];
        for &c in object_classes {
            let slot = is_object.get_mut(c as usize).ok_or_else(|| {
                Error::InvalidCatalog(format!("object class {c} >= num_classes {num_classes}"))
            })?;
            *slot = true;
        }
        let n_obj = is_object.iter().filter(|&&o| o).count();
        if n_obj == 0 {
            return Err(Error::InvalidCatalog("no object classes".into()));
        }
        if n_obj == num_classes {
            return Err(Error::InvalidCatalog("no background classes".into()));
        }
        Ok(ClassCatalog { is_object, names: None })
    }

    /// Class 0 is the single background class, classes `1..=num_objects` are objects.
    pub fn with_background(num_objects: usize) -> Result<Self> {
        let objects: Vec<u8> = (1..=num_objects).map(|c| c as u8).collect();
        ClassCatalog::new(num_objects + 1, &objects)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes() {
            return Err(Error::InvalidCatalog(format!(
                "{} names for {} classes",
                names.len(),
                self.num_classes()
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.is_object.len()
    }

    pub fn is_object(&self, class: u8) -> bool {
        self.is_object.get(class as usize).copied().unwrap_or(false)
    }

    pub fn is_background(&self, class: u8) -> bool {
        (class as usize) < self.num_classes() && !self.is_object(class)
    }

    pub fn object_classes(&self) -> impl Iterator<Item = u8> + '_ {
        (0..self.num_classes() as u8).filter(|&c| self.is_object(c))
    }

    pub fn background_classes(&self) -> impl Iterator<Item = u8> + '_ {
        (0..self.num_classes() as u8).filter(|&c| !self.is_object(c))
    }

    pub fn num_objects(&self) -> usize {
        self.object_classes().count()
    }

    pub fn name(&self, class: u8) -> String {
        match &self.names {
            Some(names) => names[class as usize].clone(),
            None if self.is_object(class) => format!("c{class}"),
            None => format!("bg{class}"),
        }
    }
}

/// Raw per-pixel, per-class network scores. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, num_classes: usize, data: Vec<f64>) -> Result<Self> {
        let expected = width * height * num_classes;
        if data.len() != expected || num_classes == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height}x{num_classes} = {expected} scores"),
                actual: format!("{} scores", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                pixel: pos / num_classes,
                class: pos % num_classes,
                value: data[pos],
            });
        }
        Ok(ScoreMap { width, height, num_classes, data })
    }

    pub fn zeros(width: usize, height: usize, num_classes: usize) -> Self {
        ScoreMap { width, height, num_classes, data: vec![0.0; width * height * num_classes] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, pixel: usize, class: usize) -> f64 {
        self.data[pixel * self.num_classes + class]
    }

    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * self.num_classes..(pixel + 1) * self.num_classes]
    }

    /// Copy with entry `(pixel, class)` shifted by `delta`. Used by gradient checks.
    pub fn perturbed(&self, pixel: usize, class: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.data[pixel * self.num_classes + class] += delta;
        out
    }
}

/// Per-pixel class probabilities; every pixel sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxMap {
    width: usize,
    height: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl SoftmaxMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, pixel: usize, class: usize) -> f64 {
        self.probs[pixel * self.num_classes + class]
    }

    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.probs[pixel * self.num_classes..(pixel + 1) * self.num_classes]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Builds a map from explicit probabilities (each pixel must sum to 1 within 1e-9).
    pub fn from_probs(width: usize, height: usize, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != width * height * num_classes || num_classes == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height}x{num_classes}"),
                actual: format!("{} probabilities", probs.len()),
            });
        }
        for (i, px) in probs.chunks(num_classes).enumerate() {
            if let Some(c) = px.iter().position(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::NonFinite { pixel: i, class: c, value: px[c] });
            }
            let sum: f64 = px.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::ShapeMismatch {
                    expected: "probabilities summing to 1".into(),
                    actual: format!("pixel {i} sums to {sum}"),
                });
            }
        }
        Ok(SoftmaxMap { width, height, num_classes, probs })
    }
}

/// Per-pixel class ids, or [`IGNORE`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelMapRepr", into = "LabelMapRepr")]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelMapRepr {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl TryFrom<LabelMapRepr> for LabelMap {
    type Error = Error;

    fn try_from(r: LabelMapRepr) -> Result<Self> {
        LabelMap::new(r.width, r.height, r.labels)
    }
}

impl From<LabelMap> for LabelMapRepr {
    fn from(m: LabelMap) -> Self {
        LabelMapRepr { width: m.width, height: m.height, labels: m.labels }
    }
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width.checked_mul(height) != Some(labels.len()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height} labels"),
                actual: format!("{} labels", labels.len()),
            });
        }
        Ok(LabelMap { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        LabelMap { width, height, labels: vec![label; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    /// Checks every non-IGNORE label against the catalog size.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l != IGNORE && l as usize >= num_classes) {
            Some(pixel) => Err(Error::LabelOutOfRange {
                pixel,
                label: self.labels[pixel],
                num_classes,
            }),
            None => Ok(()),
        }
    }
}

/// 8-bit RGB image, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height}x3 bytes"),
                actual: format!("{} bytes", data.len()),
            });
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, width * height).flatten().collect();
        RgbImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }
}

fn check_shapes(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.0, a.1),
            actual: format!("{}x{}", b.0, b.1),
        });
    }
    Ok(())
}

pub(crate) fn ensure_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    check_shapes(expected, actual)
}

/// Per-pixel softmax with max subtraction.
pub fn softmax(scores: &ScoreMap) -> SoftmaxMap {
    let n = scores.num_classes;
    let mut probs = vec![0.0; scores.data.len()];
    for (src, dst) in scores.data.chunks(n).zip(probs.chunks_mut(n)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    SoftmaxMap {
        width: scores.width,
        height: scores.height,
        num_classes: n,
        probs,
    }
}

/// Per-pixel argmax; ties go to the lowest class id.
pub fn predict(probs: &SoftmaxMap) -> LabelMap {
    let labels = probs.probs.chunks(probs.num_classes).map(argmax_lowest).collect();
    LabelMap { width: probs.width, height: probs.height, labels }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> u8 {
    let mut best = 0;
    for (c, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = c;
        }
    }
    best as u8
}
