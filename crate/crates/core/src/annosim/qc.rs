//! Quality control with planted images of known ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::event::{AnnotationEvent, TaskKind};
use super::instances::{find_instances, Instance};
use crate::error::{Error, Result};
use crate::seg::{ClassCatalog, LabelMap};
use crate::supervision::WeightScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QcStatus {
    Pass,
    Fail,
}

/// A planted image and its instances' tight boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Planted {
    pub image_id: String,
    pub instances: Vec<Instance>,
}

impl Planted {
    pub fn from_mask(image_id: impl Into<String>, mask: &LabelMap, catalog: &ClassCatalog) -> Self {
        Planted { image_id: image_id.into(), instances: find_instances(mask, catalog) }
    }

    /// Every click falls in the tight box of an instance of its class, every
    /// present class is clicked, and an all-points task has at least as many
    /// clicks as instances.
    pub fn is_correct(&self, event: &AnnotationEvent) -> bool {
        let in_box = event.clicks.iter().all(|c| {
            self.instances
                .iter()
                .any(|i| i.class == c.class && i.box_contains(c.x as usize, c.y as usize))
        });
        let present: BTreeSet<u8> = self.instances.iter().map(|i| i.class).collect();
        let clicked: BTreeSet<u8> = event.clicks.iter().map(|c| c.class).collect();
        let enough = event.task != TaskKind::AllPoints || event.clicks.len() >= self.instances.len();
        in_box && present.is_subset(&clicked) && enough
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub status: QcStatus,
    pub correct: usize,
    pub planted: usize,
    /// Fraction of planted images each annotator got right.
    pub annotator_accuracy: BTreeMap<String, f64>,
}

impl QcReport {
    pub fn confidence_scheme(&self) -> WeightScheme {
        WeightScheme::AnnotatorConfidence { confidence: self.annotator_accuracy.clone() }
    }
}

/// Minimum correct planted images for a batch to pass.
pub const MIN_CORRECT: usize = 8;

/// Grades a batch on its planted images; passes with at least `min_correct` right.
pub fn quality_control(batch: &[AnnotationEvent], planted: &[Planted], min_correct: usize) -> Result<QcReport> {
    let mut correct = 0;
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for p in planted {
        let event = batch
            .iter()
            .find(|e| e.image_id == p.image_id)
            .ok_or_else(|| Error::MissingPlanted(p.image_id.clone()))?;
        let ok = p.is_correct(event);
        correct += ok as usize;
        let t = tally.entry(event.annotator.clone()).or_default();
        t.0 += ok as usize;
        t.1 += 1;
    }
    let annotator_accuracy = tally.into_iter().map(|(a, (k, n))| (a, k as f64 / n as f64)).collect();
    let status = if correct >= min_correct { QcStatus::Pass } else { QcStatus::Fail };
    Ok(QcReport { status, correct, planted: planted.len(), annotator_accuracy })
}
