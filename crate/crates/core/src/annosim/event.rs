//! Wire format for one completed annotation task.
//!
//! For squiggle tasks `clicks[k]` pairs with `strokes[k]`: it carries the
//! stroke's class and completion time, at the stroke's first pixel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ImageLevelLabels, Point, WeightedPoints};
use crate::seg::ClassCatalog;
use crate::supervision::{SquigglePixel, SupervisionKind, SupervisionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    /// One click on one instance of every present class.
    #[serde(rename = "point")]
    Point,
    /// One click on every instance.
    #[serde(rename = "all-points")]
    AllPoints,
    /// One stroke on one instance of every present class.
    #[serde(rename = "squiggle")]
    Squiggle,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Point, TaskKind::AllPoints, TaskKind::Squiggle];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Point => "point",
            TaskKind::AllPoints => "all-points",
            TaskKind::Squiggle => "squiggle",
        }
    }

    pub fn supervision_kind(self) -> SupervisionKind {
        match self {
            TaskKind::Point => SupervisionKind::Points1,
            TaskKind::AllPoints => SupervisionKind::PointsAll,
            TaskKind::Squiggle => SupervisionKind::Squiggles,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnsupportedKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Click {
    pub x: u32,
    pub y: u32,
    pub class: u8,
    /// Milliseconds since the image was shown.
    pub t_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrokePoint {
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationEvent {
    pub image_id: String,
    pub task: TaskKind,
    pub annotator: String,
    pub clicks: Vec<Click>,
    pub strokes: Vec<Vec<StrokePoint>>,
    pub class_absent: Vec<u8>,
}

impl AnnotationEvent {
    /// Structural checks against the image it annotates.
    pub fn validate(&self, width: usize, height: usize, catalog: &ClassCatalog) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRecord(format!("event for {:?}: {m}", self.image_id)));
        if self.image_id.is_empty() {
            return bad("empty image_id".into());
        }
        let in_bounds = |x: u32, y: u32| (x as usize) < width && (y as usize) < height;
        let mut last = None;
        for c in &self.clicks {
            if !in_bounds(c.x, c.y) {
                return bad(format!("click ({}, {}) outside {width}x{height}", c.x, c.y));
            }
            if !catalog.is_object(c.class) {
                return bad(format!("click class {} is not an object class", c.class));
            }
            if last.is_some_and(|t| c.t_ms <= t) {
                return bad(format!("timestamps not strictly increasing at {} ms", c.t_ms));
            }
            last = Some(c.t_ms);
        }
        let mut absent = BTreeSet::new();
        for &c in &self.class_absent {
            if !catalog.is_object(c) {
                return bad(format!("absent class {c} is not an object class"));
            }
            if !absent.insert(c) {
                return bad(format!("class {c} marked absent twice"));
            }
        }
        if let Some(c) = self.clicks.iter().find(|c| absent.contains(&c.class)) {
            return bad(format!("class {} is both clicked and marked absent", c.class));
        }
        match self.task {
            TaskKind::Squiggle => {
                if self.strokes.len() != self.clicks.len() {
                    return bad(format!("{} strokes for {} clicks", self.strokes.len(), self.clicks.len()));
                }
                for s in &self.strokes {
                    if s.is_empty() {
                        return bad("empty stroke".into());
                    }
                    if let Some(p) = s.iter().find(|p| !in_bounds(p.x, p.y)) {
                        return bad(format!("stroke point ({}, {}) outside {width}x{height}", p.x, p.y));
                    }
                }
            }
            _ if !self.strokes.is_empty() => return bad(format!("{} task carries strokes", self.task)),
            TaskKind::Point => {
                let mut classes = BTreeSet::new();
                if let Some(c) = self.clicks.iter().find(|c| !classes.insert(c.class)) {
                    return bad(format!("class {} clicked twice in a one-point task", c.class));
                }
            }
            TaskKind::AllPoints => {}
        }
        Ok(())
    }

    /// Duration of the task: the last click time, or one second per absent
    /// decision when nothing was clicked.
    pub fn duration_ms(&self, absent_decision_ms: u64) -> u64 {
        self.clicks
            .last()
            .map(|c| c.t_ms)
            .unwrap_or(self.class_absent.len() as u64 * absent_decision_ms)
    }

    /// Training record for this event. Present classes are the clicked ones
    /// plus every background class. Points are ranked per class in click
    /// order and weighted `1/n`.
    pub fn to_record(&self, width: usize, height: usize, catalog: &ClassCatalog) -> Result<SupervisionRecord> {
        self.validate(width, height, catalog)?;
        let clicked: BTreeSet<u8> = self.clicks.iter().map(|c| c.class).collect();
        let present: BTreeSet<u8> = clicked.iter().copied().chain(catalog.background_classes()).collect();
        let labels = ImageLevelLabels::new(present, self.class_absent.iter().copied())?;
        let pixel = |x: u32, y: u32| y as usize * width + x as usize;
        match self.task {
            TaskKind::Point | TaskKind::AllPoints => {
                let n = self.clicks.len().max(1) as f64;
                let mut rank: BTreeMap<u8, u32> = BTreeMap::new();
                let points = self
                    .clicks
                    .iter()
                    .map(|c| {
                        let r = rank.entry(c.class).or_insert(0);
                        let p = Point {
                            pixel: pixel(c.x, c.y),
                            class: c.class,
                            weight: 1.0 / n,
                            rank: Some(*r),
                            annotator: self.annotator.clone(),
                        };
                        *r += 1;
                        p
                    })
                    .collect();
                let points = WeightedPoints::merged(points)?;
                Ok(SupervisionRecord::points(&self.image_id, self.task.supervision_kind(), labels, points))
            }
            TaskKind::Squiggle => {
                let pixels = self
                    .clicks
                    .iter()
                    .zip(&self.strokes)
                    .flat_map(|(c, s)| s.iter().map(move |p| SquigglePixel { pixel: pixel(p.x, p.y), class: c.class }))
                    .collect();
                Ok(SupervisionRecord::squiggles(&self.image_id, labels, pixels))
            }
        }
    }
}
