//! On-disk dataset layout written by `datagen`:
//!
//! ```text
//! dataset.json                     catalog and split ids
//! images/<id>.png                  RGB scene
//! labels/<id>.png                  8-bit class indices, 255 = ignore
//! annotations/<task>.jsonl         one AnnotationEvent per training scene
//! windows/<id>.jsonl               scored objectness windows per training scene
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use pointsup_core::annosim::{AnnotationEvent, Scene, TaskKind};
use pointsup_core::experiment::{Dataset, DatasetParts};
use pointsup_core::io::{decode_label_png, decode_rgb_png, encode_label_png, encode_rgb_png};
use pointsup_core::objectness::{windows_from_jsonl, windows_to_jsonl};
use pointsup_core::seg::ClassCatalog;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub catalog: ClassCatalog,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Ids become file names, so they are restricted to a safe alphabet.
pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
        && !id.starts_with('-');
    if !ok {
        bail!("invalid image id {id:?}");
    }
    Ok(())
}

pub fn events_to_jsonl(events: &[AnnotationEvent]) -> String {
    events.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
}

pub fn events_from_jsonl(text: &str) -> Result<Vec<AnnotationEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
        .collect()
}

fn annotation_file(dir: &Path, task: TaskKind) -> std::path::PathBuf {
    dir.join("annotations").join(format!("{task}.jsonl"))
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    for sub in ["images", "labels", "annotations", "windows"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    for s in data.train.iter().chain(&data.test) {
        check_id(&s.id)?;
        fs::write(dir.join("images").join(format!("{}.png", s.id)), encode_rgb_png(&s.image)?)?;
        fs::write(dir.join("labels").join(format!("{}.png", s.id)), encode_label_png(&s.mask)?)?;
    }
    for (s, w) in data.train.iter().zip(&data.windows) {
        fs::write(dir.join("windows").join(format!("{}.jsonl", s.id)), windows_to_jsonl(w))?;
    }
    let lists = [
        (TaskKind::Point, &data.point_events),
        (TaskKind::AllPoints, &data.all_point_events),
        (TaskKind::Squiggle, &data.squiggle_events),
    ];
    for (task, events) in lists {
        fs::write(annotation_file(dir, task), events_to_jsonl(events))?;
    }
    let manifest = Manifest {
        format: FORMAT_VERSION,
        catalog: data.catalog.clone(),
        train: data.train.iter().map(|s| s.id.clone()).collect(),
        test: data.test.iter().map(|s| s.id.clone()).collect(),
    };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("dataset.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading dataset manifest {}", path.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if m.format != FORMAT_VERSION {
        bail!("{}: unsupported dataset format {}", path.display(), m.format);
    }
    for id in m.train.iter().chain(&m.test) {
        check_id(id)?;
    }
    Ok(m)
}

/// Image and label map of one scene; placed shapes are not stored.
pub fn read_scene(dir: &Path, id: &str) -> Result<Scene> {
    check_id(id)?;
    let read = |sub: &str| {
        let p = dir.join(sub).join(format!("{id}.png"));
        fs::read(&p).with_context(|| format!("reading {}", p.display()))
    };
    let image = decode_rgb_png(&read("images")?).with_context(|| format!("decoding image {id}"))?;
    let mask = decode_label_png(&read("labels")?).with_context(|| format!("decoding labels {id}"))?;
    Ok(Scene { id: id.to_string(), image, mask, shapes: Vec::new() })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let scenes = |ids: &[String]| ids.iter().map(|id| read_scene(dir, id)).collect::<Result<Vec<_>>>();
    let events = |task| -> Result<Vec<AnnotationEvent>> {
        let p = annotation_file(dir, task);
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        events_from_jsonl(&text).with_context(|| format!("parsing {}", p.display()))
    };
    let windows = m
        .train
        .iter()
        .map(|id| {
            let p = dir.join("windows").join(format!("{id}.jsonl"));
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            windows_from_jsonl(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<_>>()?;
    let data = Dataset::from_parts(DatasetParts {
        train: scenes(&m.train)?,
        test: scenes(&m.test)?,
        point_events: events(TaskKind::Point)?,
        all_point_events: events(TaskKind::AllPoints)?,
        squiggle_events: events(TaskKind::Squiggle)?,
        catalog: m.catalog,
        windows,
    })
    .with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_restricted() {
        for ok in ["scene-00001", "t_3", "A9"] {
            check_id(ok).unwrap();
        }
        for bad in ["", "../x", "a/b", "-x", "a b", "é"] {
            assert!(check_id(bad).is_err(), "{bad}");
        }
    }
}
