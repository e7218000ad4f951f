//! Per-image supervision payloads, point weighting schemes, patch dilation and
//! hybrid dataset composition.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ImageLevelLabels, Point, WeightedPoints};
use crate::rng;
use crate::seg::{ClassCatalog, LabelMap, IGNORE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SupervisionKind {
    #[serde(rename = "FULL")]
    Full,
    #[serde(rename = "IMAGE_LEVEL")]
    ImageLevel,
    #[serde(rename = "POINTS_1")]
    Points1,
    #[serde(rename = "POINTS_ALL")]
    PointsAll,
    #[serde(rename = "SQUIGGLES")]
    Squiggles,
    #[serde(rename = "HYBRID_MEMBER")]
    HybridMember,
}

impl SupervisionKind {
    pub const ALL: [SupervisionKind; 6] = [
        SupervisionKind::Full,
        SupervisionKind::ImageLevel,
        SupervisionKind::Points1,
        SupervisionKind::PointsAll,
        SupervisionKind::Squiggles,
        SupervisionKind::HybridMember,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SupervisionKind::Full => "FULL",
            SupervisionKind::ImageLevel => "IMAGE_LEVEL",
            SupervisionKind::Points1 => "POINTS_1",
            SupervisionKind::PointsAll => "POINTS_ALL",
            SupervisionKind::Squiggles => "SQUIGGLES",
            SupervisionKind::HybridMember => "HYBRID_MEMBER",
        }
    }
}

impl std::fmt::Display for SupervisionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SupervisionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SupervisionKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnsupportedKind(s.to_string()))
    }
}

/// A labeled squiggle pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquigglePixel {
    pub pixel: usize,
    pub class: u8,
}

/// Everything known about one training image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisionRecord {
    pub image_id: String,
    pub kind: SupervisionKind,
    pub labels: ImageLevelLabels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<LabelMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<WeightedPoints>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub squiggle_pixels: Option<Vec<SquigglePixel>>,
}

impl SupervisionRecord {
    pub fn full(image_id: impl Into<String>, mask: LabelMap, catalog: &ClassCatalog) -> Result<Self> {
        let labels = derive_image_labels(&mask, catalog)?;
        Ok(SupervisionRecord {
            image_id: image_id.into(),
            kind: SupervisionKind::Full,
            labels,
            mask: Some(mask),
            points: None,
            squiggle_pixels: None,
        })
    }

    pub fn image_level(image_id: impl Into<String>, labels: ImageLevelLabels) -> Self {
        SupervisionRecord {
            image_id: image_id.into(),
            kind: SupervisionKind::ImageLevel,
            labels,
            mask: None,
            points: None,
            squiggle_pixels: None,
        }
    }

    pub fn points(
        image_id: impl Into<String>,
        kind: SupervisionKind,
        labels: ImageLevelLabels,
        points: WeightedPoints,
    ) -> Self {
        SupervisionRecord {
            image_id: image_id.into(),
            kind,
            labels,
            mask: None,
            points: Some(points),
            squiggle_pixels: None,
        }
    }

    pub fn squiggles(image_id: impl Into<String>, labels: ImageLevelLabels, pixels: Vec<SquigglePixel>) -> Self {
        SupervisionRecord {
            image_id: image_id.into(),
            kind: SupervisionKind::Squiggles,
            labels,
            mask: None,
            points: None,
            squiggle_pixels: Some(pixels),
        }
    }

    pub fn require_mask(&self) -> Result<&LabelMap> {
        self.mask
            .as_ref()
            .ok_or_else(|| Error::InvalidRecord(format!("{} record {:?} has no mask", self.kind, self.image_id)))
    }

    pub fn require_points(&self) -> Result<&WeightedPoints> {
        self.points
            .as_ref()
            .ok_or_else(|| Error::InvalidRecord(format!("{} record {:?} has no points", self.kind, self.image_id)))
    }

    /// Squiggle pixels as supervised points with uniform weight `1/n`.
    pub fn squiggle_points(&self) -> Result<WeightedPoints> {
        let pixels = self.squiggle_pixels.as_ref().ok_or_else(|| {
            Error::InvalidRecord(format!("squiggle record {:?} has no pixels", self.image_id))
        })?;
        if pixels.is_empty() {
            return Ok(WeightedPoints::empty());
        }
        let w = 1.0 / pixels.len() as f64;
        WeightedPoints::merged(pixels.iter().map(|p| Point::new(p.pixel, p.class, w)).collect())
    }

    /// Checks the payload required by the kind and every index against the image size.
    pub fn validate(&self, catalog: &ClassCatalog, width: usize, height: usize) -> Result<()> {
        let n = catalog.num_classes();
        self.labels.validate(n)?;
        if let Some(mask) = &self.mask {
            crate::seg::ensure_dims((width, height), (mask.width(), mask.height()))?;
            mask.validate(n)?;
        }
        if let Some(points) = &self.points {
            points.check_bounds(width * height)?;
        }
        if let Some(sq) = &self.squiggle_pixels {
            if let Some(p) = sq.iter().find(|p| p.pixel >= width * height || p.class as usize >= n) {
                return Err(Error::InvalidRecord(format!("squiggle pixel {p:?} out of range")));
            }
        }
        let bad = |msg: &str| Err(Error::InvalidRecord(format!("{} record {:?}: {msg}", self.kind, self.image_id)));
        match self.kind {
            SupervisionKind::Full if self.mask.is_none() => bad("missing mask"),
            SupervisionKind::ImageLevel if self.mask.is_some() || self.points.is_some() => {
                bad("image-level records carry neither mask nor points")
            }
            SupervisionKind::Points1 | SupervisionKind::PointsAll => {
                let points = self.require_points()?;
                let clicked: BTreeSet<u8> = points.points().iter().map(|p| p.class).collect();
                match self.labels.present().iter().find(|&&c| catalog.is_object(c) && !clicked.contains(&c)) {
                    Some(c) => bad(&format!("present object class {c} has no point")),
                    None => Ok(()),
                }
            }
            SupervisionKind::Squiggles if self.squiggle_pixels.is_none() => bad("missing squiggle pixels"),
            _ => Ok(()),
        }
    }
}

/// How supervised points are weighted in the point loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "scheme", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum WeightScheme {
    /// `alpha = 1/n` for the `n` supervised pixels of an image.
    #[default]
    #[serde(rename = "UNIFORM_1_OVER_N", alias = "UNIFORM")]
    Uniform,
    /// `alpha = confidence(annotator) / n`.
    AnnotatorConfidence { confidence: BTreeMap<String, f64> },
    /// `alpha = 1 / 2^r` where `r` is the point's rank within its class.
    RankHalving,
}

impl WeightScheme {
    pub fn validate(&self) -> Result<()> {
        if let WeightScheme::AnnotatorConfidence { confidence } = self {
            if let Some((id, v)) = confidence.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Config(format!("confidence {v} for annotator {id:?} outside [0,1]")));
            }
        }
        Ok(())
    }
}

pub fn assign_weights(points: &WeightedPoints, scheme: &WeightScheme) -> Result<WeightedPoints> {
    if points.is_empty() {
        return Err(Error::InvalidPoints("cannot weight an empty point list".into()));
    }
    scheme.validate()?;
    let n = points.len() as f64;
    let mut out = Vec::with_capacity(points.len());
    for (idx, p) in points.points().iter().enumerate() {
        let weight = match scheme {
            WeightScheme::Uniform => 1.0 / n,
            WeightScheme::AnnotatorConfidence { confidence } => {
                let c = confidence
                    .get(&p.annotator)
                    .ok_or_else(|| Error::UnknownAnnotator(p.annotator.clone()))?;
                c / n
            }
            WeightScheme::RankHalving => {
                let r = p.rank.ok_or(Error::MissingRank(idx))?;
                0.5f64.powi(r.min(1074) as i32)
            }
        };
        out.push(Point { weight, ..p.clone() });
    }
    // A zero-confidence annotator contributes nothing.
    out.retain(|p| p.weight > 0.0);
    WeightedPoints::new(out)
}

/// Discrete disc of offsets with `dx^2 + dy^2 <= radius^2`.
pub fn disc_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Expands each point into the in-bounds disc of the given radius.
///
/// Each disc carries its source point's total weight, split evenly across its
/// pixels. Same-class overlaps add; pixels claimed by discs of different
/// classes are dropped from all of them.
pub fn dilate_points(points: &WeightedPoints, radius: u32, width: usize, height: usize) -> Result<WeightedPoints> {
    points.check_bounds(width * height)?;
    if radius == 0 {
        return Ok(points.clone());
    }
    let offsets = disc_offsets(radius);
    let mut out: Vec<Point> = Vec::new();
    let mut index: HashMap<(usize, u8), usize> = HashMap::new();
    for p in points.points() {
        let (px, py) = ((p.pixel % width) as i64, (p.pixel / width) as i64);
        let disc: Vec<usize> = offsets
            .iter()
            .map(|(dx, dy)| (px + dx, py + dy))
            .filter(|&(x, y)| x >= 0 && y >= 0 && x < width as i64 && y < height as i64)
            .map(|(x, y)| y as usize * width + x as usize)
            .collect();
        let w = p.weight / disc.len() as f64;
        for pixel in disc {
            match index.get(&(pixel, p.class)) {
                Some(&k) => out[k].weight += w,
                None => {
                    index.insert((pixel, p.class), out.len());
                    out.push(Point { pixel, weight: w, ..p.clone() });
                }
            }
        }
    }
    let mut classes_at: HashMap<usize, BTreeSet<u8>> = HashMap::new();
    for p in &out {
        classes_at.entry(p.pixel).or_default().insert(p.class);
    }
    out.retain(|p| classes_at[&p.pixel].len() == 1);
    WeightedPoints::new(out)
}

/// Present set = classes with at least one labeled pixel (background included);
/// absent set = object classes with no labeled pixel.
pub fn derive_image_labels(mask: &LabelMap, catalog: &ClassCatalog) -> Result<ImageLevelLabels> {
    mask.validate(catalog.num_classes())?;
    let present: BTreeSet<u8> = mask.labels().iter().copied().filter(|&l| l != IGNORE).collect();
    if present.is_empty() {
        return Err(Error::EmptyMask);
    }
    let absent: Vec<u8> = catalog.object_classes().filter(|c| !present.contains(c)).collect();
    ImageLevelLabels::new(present, absent)
}

/// Picks `n_full` images (seeded) to keep full masks; every other image uses
/// its point record. `full` and `points` are aligned per image.
pub fn compose_hybrid(
    full: &[SupervisionRecord],
    points: &[SupervisionRecord],
    n_full: usize,
    seed: u64,
) -> Result<Vec<SupervisionRecord>> {
    if full.len() != points.len() {
        return Err(Error::Config(format!(
            "hybrid sources disagree in length: {} full vs {} point records",
            full.len(),
            points.len()
        )));
    }
    if n_full > full.len() {
        return Err(Error::Config(format!("n_full = {n_full} exceeds dataset size {}", full.len())));
    }
    let mut r = rng::seeded(rng::derive_seed(seed, "hybrid", 0));
    let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut r, full.len(), n_full).into_iter().collect();
    full.iter()
        .zip(points)
        .enumerate()
        .map(|(i, (f, p))| {
            if chosen.contains(&i) {
                if f.kind != SupervisionKind::Full {
                    return Err(Error::InvalidRecord(format!("record {:?} is not FULL", f.image_id)));
                }
                Ok(f.clone())
            } else {
                let mut rec = p.clone();
                rec.kind = SupervisionKind::Points1;
                Ok(rec)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(usize, u8, f64, Option<u32>, &str)]) -> WeightedPoints {
        WeightedPoints::new(
            v.iter()
                .map(|&(pixel, class, weight, rank, a)| Point { pixel, class, weight, rank, annotator: a.into() })
                .collect(),
        )
        .unwrap()
    }

    fn weights(p: &WeightedPoints) -> Vec<f64> {
        p.points().iter().map(|p| p.weight).collect()
    }

    #[test]
    fn uniform_weights() {
        let p = pts(&[(0, 1, 1.0, None, ""), (5, 2, 1.0, None, "")]);
        assert_eq!(weights(&assign_weights(&p, &WeightScheme::Uniform).unwrap()), vec![0.5, 0.5]);
    }

    #[test]
    fn rank_halving_weights() {
        let p = pts(&[(0, 1, 1.0, Some(0), ""), (3, 1, 1.0, Some(1), ""), (7, 1, 1.0, Some(2), "")]);
        let w = weights(&assign_weights(&p, &WeightScheme::RankHalving).unwrap());
        assert_eq!(w, vec![1.0, 0.5, 0.25]);
        assert!(w.iter().sum::<f64>() < 2.0);
        let unranked = pts(&[(0, 1, 1.0, None, "")]);
        assert!(matches!(assign_weights(&unranked, &WeightScheme::RankHalving), Err(Error::MissingRank(0))));
    }

    #[test]
    fn confidence_weights() {
        let p = pts(&[(0, 1, 1.0, None, "a"), (1, 2, 1.0, None, "b")]);
        let scheme = WeightScheme::AnnotatorConfidence {
            confidence: [("a".to_string(), 1.0), ("b".to_string(), 0.5)].into_iter().collect(),
        };
        assert_eq!(weights(&assign_weights(&p, &scheme).unwrap()), vec![0.5, 0.25]);
        let q = pts(&[(0, 1, 1.0, None, "zed")]);
        assert!(matches!(assign_weights(&q, &scheme), Err(Error::UnknownAnnotator(_))));
        assert!(assign_weights(&WeightedPoints::empty(), &WeightScheme::Uniform).is_err());
    }

    #[test]
    fn weight_scheme_json() {
        let s: WeightScheme = serde_json::from_str(r#"{"scheme":"RANK_HALVING"}"#).unwrap();
        assert_eq!(s, WeightScheme::RankHalving);
        let s: WeightScheme = serde_json::from_str(r#"{"scheme":"UNIFORM_1_OVER_N"}"#).unwrap();
        assert_eq!(s, WeightScheme::Uniform);
        let bad = WeightScheme::AnnotatorConfidence { confidence: [("a".to_string(), 1.5)].into_iter().collect() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn disc_has_thirteen_pixels_at_radius_two() {
        // Enumerate offsets directly rather than through the implementation.
        let mut count = 0;
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                if dx * dx + dy * dy <= 4 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 13);
        let p = pts(&[(5 * 11 + 5, 1, 1.0, None, "")]);
        let d = dilate_points(&p, 2, 11, 11).unwrap();
        assert_eq!(d.len(), 13);
        assert!((weights(&d).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dilation_radius_zero_is_identity() {
        let p = pts(&[(3, 1, 0.7, Some(0), "a"), (8, 2, 0.3, None, "b")]);
        assert_eq!(dilate_points(&p, 0, 4, 4).unwrap(), p);
    }

    #[test]
    fn dilation_clips_at_corner() {
        let p = pts(&[(0, 1, 1.0, None, "")]);
        let d = dilate_points(&p, 2, 10, 10).unwrap();
        // Quadrant of the radius-2 disc: (0,0),(1,0),(2,0),(0,1),(1,1),(0,2).
        let mut pixels: Vec<usize> = d.points().iter().map(|p| p.pixel).collect();
        pixels.sort();
        assert_eq!(pixels, vec![0, 1, 2, 10, 11, 20]);
        assert!((weights(&d).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dilation_drops_cross_class_overlap() {
        let p = pts(&[(0, 1, 1.0, None, ""), (2, 2, 1.0, None, "")]);
        let d = dilate_points(&p, 1, 3, 1).unwrap();
        // Pixel 1 is claimed by both classes.
        let mut got: Vec<(usize, u8)> = d.points().iter().map(|p| (p.pixel, p.class)).collect();
        got.sort();
        assert_eq!(got, vec![(0, 1), (2, 2)]);
    }

    #[test]
    fn dilation_nests_with_radius() {
        let p = pts(&[(27, 3, 1.0, None, "")]);
        let mut prev: BTreeSet<usize> = BTreeSet::new();
        for r in 0..6 {
            let cur: BTreeSet<usize> = dilate_points(&p, r, 9, 7).unwrap().points().iter().map(|p| p.pixel).collect();
            assert!(prev.is_subset(&cur));
            prev = cur;
        }
    }

    #[test]
    fn image_labels_from_mask() {
        let catalog = ClassCatalog::with_background(5).unwrap();
        let all3 = LabelMap::filled(2, 2, 3);
        let l = derive_image_labels(&all3, &catalog).unwrap();
        assert_eq!(l.present().iter().copied().collect::<Vec<_>>(), vec![3]);
        assert_eq!(l.absent().iter().copied().collect::<Vec<_>>(), vec![1, 2, 4, 5]);

        let m = LabelMap::new(4, 1, vec![1, 4, IGNORE, 0]).unwrap();
        let l = derive_image_labels(&m, &catalog).unwrap();
        assert_eq!(l.present().iter().copied().collect::<Vec<_>>(), vec![0, 1, 4]);
        assert!(l.absent().contains(&2));
        assert!(!l.present().contains(&2));
        assert!(matches!(derive_image_labels(&LabelMap::filled(2, 1, IGNORE), &catalog), Err(Error::EmptyMask)));
    }

    fn dataset(n: usize) -> (Vec<SupervisionRecord>, Vec<SupervisionRecord>) {
        let catalog = ClassCatalog::with_background(1).unwrap();
        let mut full = Vec::new();
        let mut points = Vec::new();
        for i in 0..n {
            let mask = LabelMap::new(2, 1, vec![0, 1]).unwrap();
            let labels = derive_image_labels(&mask, &catalog).unwrap();
            full.push(SupervisionRecord::full(format!("img{i}"), mask, &catalog).unwrap());
            points.push(SupervisionRecord::points(
                format!("img{i}"),
                SupervisionKind::Points1,
                labels,
                pts(&[(1, 1, 1.0, Some(0), "")]),
            ));
        }
        (full, points)
    }

    #[test]
    fn hybrid_composition() {
        let (full, points) = dataset(20);
        let count = |v: &[SupervisionRecord], k| v.iter().filter(|r| r.kind == k).count();
        let all = compose_hybrid(&full, &points, 20, 1).unwrap();
        assert_eq!(count(&all, SupervisionKind::Full), 20);
        let none = compose_hybrid(&full, &points, 0, 1).unwrap();
        assert_eq!(count(&none, SupervisionKind::Points1), 20);
        let some = compose_hybrid(&full, &points, 5, 1).unwrap();
        assert_eq!(count(&some, SupervisionKind::Full), 5);
        assert_eq!(some, compose_hybrid(&full, &points, 5, 1).unwrap());
        assert!(compose_hybrid(&full, &points, 21, 1).is_err());
    }

    #[test]
    fn record_validation_and_json() {
        let catalog = ClassCatalog::with_background(2).unwrap();
        let labels = ImageLevelLabels::new([0, 1, 2], []).unwrap();
        let rec = SupervisionRecord::points("a", SupervisionKind::Points1, labels.clone(), pts(&[(0, 1, 1.0, None, "")]));
        assert!(rec.validate(&catalog, 2, 2).is_err(), "class 2 has no point");
        let ok = SupervisionRecord::points(
            "a",
            SupervisionKind::Points1,
            labels.clone(),
            pts(&[(0, 1, 1.0, None, ""), (3, 2, 1.0, None, "")]),
        );
        ok.validate(&catalog, 2, 2).unwrap();
        let json = serde_json::to_string(&ok).unwrap();
        let back: SupervisionRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ok);
        assert!(json.contains(r#""kind":"POINTS_1""#));

        let mut img = SupervisionRecord::image_level("b", labels);
        img.validate(&catalog, 2, 2).unwrap();
        img.mask = Some(LabelMap::filled(2, 2, 0));
        assert!(img.validate(&catalog, 2, 2).is_err());
        assert!(serde_json::from_str::<SupervisionRecord>(r#"{"image_id":"x","kind":"FULL","labels":{"present":[0]},"extra":1}"#).is_err());
    }

    #[test]
    fn squiggle_points_are_uniform() {
        let labels = ImageLevelLabels::new([1], []).unwrap();
        let rec = SupervisionRecord::squiggles(
            "s",
            labels,
            vec![SquigglePixel { pixel: 0, class: 1 }, SquigglePixel { pixel: 1, class: 1 }, SquigglePixel { pixel: 2, class: 1 }, SquigglePixel { pixel: 3, class: 1 }],
        );
        assert_eq!(weights(&rec.squiggle_points().unwrap()), vec![0.25; 4]);
    }
}
