//! Synthetic scenes: coloured shapes on a textured background.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::seg::{ClassCatalog, LabelMap, RgbImage, IGNORE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disc,
    Rectangle,
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub num_object_classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Side of a shape's bounding square, inclusive range.
    pub min_size: usize,
    pub max_size: usize,
    pub shape_kinds: Vec<ShapeKind>,
    /// One colour per object class; a fixed palette is used when empty.
    pub palette: Vec<[u8; 3]>,
    pub background: [u8; 3],
    /// Per-instance uniform colour offset, per channel.
    pub color_jitter: f64,
    /// Per-pixel Gaussian noise, intensity units.
    pub noise: f64,
    /// Background blobs coloured like a class in the scene, pulled toward the
    /// background colour by `distractor_shade` (0 = class colour, 1 = background).
    pub min_distractors: usize,
    pub max_distractors: usize,
    pub distractor_shade: f64,
    pub seed: u64,
}

const DEFAULT_PALETTE: [[u8; 3]; 8] = [
    [200, 40, 40],
    [40, 170, 60],
    [50, 70, 210],
    [220, 200, 40],
    [190, 60, 200],
    [40, 190, 200],
    [230, 130, 30],
    [120, 80, 40],
];

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 32,
            height: 32,
            num_object_classes: 5,
            min_shapes: 1,
            max_shapes: 3,
            min_size: 8,
            max_size: 14,
            shape_kinds: vec![ShapeKind::Disc, ShapeKind::Rectangle, ShapeKind::Triangle],
            palette: Vec::new(),
            background: [110, 110, 110],
            color_jitter: 12.0,
            noise: 12.0,
            min_distractors: 1,
            max_distractors: 3,
            distractor_shade: 0.5,
            seed: 0,
        }
    }
}

/// Attempts per shape before giving up on a placement.
const PLACEMENT_RETRIES: usize = 200;
/// Minimum gap between shape bounding boxes, so instances never touch.
const GAP: usize = 2;
const LAYOUT_RETRIES: usize = 20;

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.min_shapes == 0 {
            return bad("scenes need at least one object (min_shapes >= 1)".into());
        }
        if self.max_shapes < self.min_shapes || self.max_size < self.min_size || self.min_size < 3 {
            return bad(format!(
                "bad ranges: shapes {}..={}, size {}..={} (size >= 3)",
                self.min_shapes, self.max_shapes, self.min_size, self.max_size
            ));
        }
        if self.max_size > self.width || self.max_size > self.height {
            return bad(format!("shape size {} exceeds the {}x{} image", self.max_size, self.width, self.height));
        }
        if self.num_object_classes == 0 || self.num_object_classes >= IGNORE as usize {
            return bad(format!("num_object_classes {} out of range", self.num_object_classes));
        }
        if self.shape_kinds.is_empty() {
            return bad("no shape kinds".into());
        }
        if self.palette.is_empty() && self.num_object_classes > DEFAULT_PALETTE.len() {
            return bad(format!("supply a palette for more than {} classes", DEFAULT_PALETTE.len()));
        }
        if !self.palette.is_empty() && self.palette.len() != self.num_object_classes {
            return bad(format!("{} palette entries for {} classes", self.palette.len(), self.num_object_classes));
        }
        if self.max_distractors < self.min_distractors {
            return bad("max_distractors < min_distractors".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_shade) {
            return bad(format!("distractor_shade {} outside [0,1]", self.distractor_shade));
        }
        if !(self.noise >= 0.0 && self.color_jitter >= 0.0) {
            return bad("noise and color_jitter must be non-negative".into());
        }
        Ok(())
    }

    pub fn catalog(&self) -> Result<ClassCatalog> {
        ClassCatalog::with_background(self.num_object_classes)
    }

    pub fn class_color(&self, class: u8) -> [u8; 3] {
        let i = class as usize - 1;
        if self.palette.is_empty() {
            DEFAULT_PALETTE[i]
        } else {
            self.palette[i]
        }
    }
}

pub fn scene_id(index: u64) -> String {
    format!("scene-{index:05}")
}

/// Axis-aligned placement of one shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedShape {
    pub kind: ShapeKind,
    pub class: u8,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
}

impl PlacedShape {
    /// Whether pixel `(x, y)` is covered, judged at the pixel centre.
    pub fn covers(&self, x: usize, y: usize) -> bool {
        if x < self.x0 || y < self.y0 || x >= self.x0 + self.size || y >= self.y0 + self.size {
            return false;
        }
        let s = self.size as f64;
        let (u, v) = ((x - self.x0) as f64 + 0.5, (y - self.y0) as f64 + 0.5);
        match self.kind {
            ShapeKind::Rectangle => true,
            ShapeKind::Disc => (u - s / 2.0).powi(2) + (v - s / 2.0).powi(2) <= (s / 2.0).powi(2),
            // Apex at top centre, base along the bottom edge.
            ShapeKind::Triangle => (u - s / 2.0).abs() <= v / 2.0,
        }
    }

    pub fn area(&self) -> usize {
        (self.y0..self.y0 + self.size)
            .flat_map(|y| (self.x0..self.x0 + self.size).map(move |x| (x, y)))
            .filter(|&(x, y)| self.covers(x, y))
            .count()
    }

    fn overlaps(&self, other: &PlacedShape, gap: usize) -> bool {
        let a = (self.x0, self.y0, self.x0 + self.size, self.y0 + self.size);
        let b = (other.x0, other.y0, other.x0 + other.size, other.y0 + other.size);
        a.0 < b.2 + gap && b.0 < a.2 + gap && a.1 < b.3 + gap && b.1 < a.3 + gap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: RgbImage,
    pub mask: LabelMap,
    pub shapes: Vec<PlacedShape>,
}

/// Deterministic in `(cfg.seed, index)`.
pub fn generate_scene(cfg: &SceneConfig, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut r = rng::seeded(rng::derive_seed(cfg.seed, "scene", index));
    let (w, h) = (cfg.width, cfg.height);
    let n_shapes = r.random_range(cfg.min_shapes..=cfg.max_shapes);
    let n_distractors = r.random_range(cfg.min_distractors..=cfg.max_distractors);

    let mut shapes: Vec<PlacedShape> = Vec::with_capacity(n_shapes);
    let mut layouts = 0;
    while shapes.len() < n_shapes {
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let size = r.random_range(cfg.min_size..=cfg.max_size);
            let cand = PlacedShape {
                kind: cfg.shape_kinds[r.random_range(0..cfg.shape_kinds.len())],
                class: r.random_range(1..=cfg.num_object_classes) as u8,
                x0: r.random_range(0..=w - size),
                y0: r.random_range(0..=h - size),
                size,
            };
            if shapes.iter().all(|o| !cand.overlaps(o, GAP)) {
                placed = Some(cand);
                break;
            }
        }
        match placed {
            Some(p) => shapes.push(p),
            // Early shapes can box out later ones; start the layout over.
            None if layouts + 1 < LAYOUT_RETRIES => {
                layouts += 1;
                shapes.clear();
            }
            None => {
                return Err(Error::Placement(format!(
                    "could not place shape {} of {n_shapes} in a {w}x{h} scene after {LAYOUT_RETRIES} layouts",
                    shapes.len() + 1
                )))
            }
        }
    }

    // Background: smooth two-axis gradient plus pixel noise.
    let mut image = RgbImage::filled(w, h, cfg.background);
    let grad: Vec<f64> = (0..6).map(|_| r.random_range(-25.0..25.0)).collect();
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid spread");
    let mut base = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 / w as f64 - 0.5, y as f64 / h as f64 - 0.5);
            for c in 0..3 {
                base[y * w + x][c] = cfg.background[c] as f64 + grad[2 * c] * fx + grad[2 * c + 1] * fy;
            }
        }
    }

    // Distractors repaint background in a shade of a class present in the
    // scene but keep the background label.
    for _ in 0..n_distractors {
        let size = r.random_range(cfg.min_size / 2..=cfg.max_size).max(2);
        let blob = PlacedShape {
            kind: cfg.shape_kinds[r.random_range(0..cfg.shape_kinds.len())],
            class: shapes[r.random_range(0..shapes.len())].class,
            x0: r.random_range(0..=w - size),
            y0: r.random_range(0..=h - size),
            size,
        };
        let t = cfg.distractor_shade;
        let tint = cfg.class_color(blob.class);
        let mixed = [0, 1, 2].map(|c| ((1.0 - t) * tint[c] as f64 + t * cfg.background[c] as f64).round() as u8);
        let color = jittered(mixed, cfg.color_jitter, &mut r);
        paint(&mut base, w, &blob, color);
    }

    let mut mask = LabelMap::filled(w, h, 0);
    let mut owner = vec![usize::MAX; w * h];
    for (k, s) in shapes.iter().enumerate() {
        let color = jittered(cfg.class_color(s.class), cfg.color_jitter, &mut r);
        paint(&mut base, w, s, color);
        for y in s.y0..s.y0 + s.size {
            for x in s.x0..s.x0 + s.size {
                if s.covers(x, y) {
                    mask.set(x, y, s.class);
                    owner[y * w + x] = k;
                }
            }
        }
    }

    // 1-pixel IGNORE ring: uncovered pixels 8-adjacent to a shape.
    let mut ring = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if owner[y * w + x] != usize::MAX {
                continue;
            }
            let near = neighbors8(x, y, w, h).any(|(nx, ny)| owner[ny * w + nx] != usize::MAX);
            if near {
                ring.push((x, y));
            }
        }
    }
    for (x, y) in ring {
        mask.set(x, y, IGNORE);
    }

    for (i, px) in base.iter().enumerate() {
        let rgb = [0, 1, 2].map(|c| {
            let n = if cfg.noise > 0.0 { noise.sample(&mut r) } else { 0.0 };
            (px[c] + n).round().clamp(0.0, 255.0) as u8
        });
        image.set_pixel(i % w, i / w, rgb);
    }
    Ok(Scene { id: scene_id(index), image, mask, shapes })
}

fn jittered(color: [u8; 3], jitter: f64, r: &mut rng::Rng) -> [f64; 3] {
    color.map(|c| c as f64 + if jitter > 0.0 { r.random_range(-jitter..=jitter) } else { 0.0 })
}

fn paint(base: &mut [[f64; 3]], w: usize, s: &PlacedShape, color: [f64; 3]) {
    for y in s.y0..s.y0 + s.size {
        for x in s.x0..s.x0 + s.size {
            if s.covers(x, y) {
                base[y * w + x] = color;
            }
        }
    }
}

pub(crate) fn neighbors8(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(|dy| (-1i64..=1).map(move |dx| (dx, dy)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dx, dy)| {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64).then_some((nx as usize, ny as usize))
        })
}
