//! Per-pixel objectness prior aggregated from scored windows.
//!
//! The prior at a pixel is the mean score of every window containing it. Scores
//! are accumulated on a 2D difference array in 62-bit fixed point, so the sum at
//! each pixel is exact and independent of window order.

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::seg::{ClassCatalog, LabelMap, RgbImage, IGNORE};

const FIXED_ONE: f64 = (1u64 << 62) as f64;

/// An inclusive pixel box with an objectness score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredWindow {
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
    pub score: f64,
}

impl ScoredWindow {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32, score: f64) -> Self {
        ScoredWindow { bbox: [x0, y0, x1, y1], score }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let [x0, y0, x1, y1] = self.bbox.map(|v| v as usize);
        x0 <= x && x <= x1 && y0 <= y && y <= y1
    }

    fn check(&self, index: usize, width: usize, height: usize) -> Result<()> {
        let [x0, y0, x1, y1] = self.bbox;
        if x0 > x1 || y0 > y1 || x1 as usize >= width || y1 as usize >= height {
            return Err(Error::WindowOutOfBounds { index, bbox: self.bbox, width, height });
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidPrior(format!("window {index} has score {}", self.score)));
        }
        Ok(())
    }
}

/// Per-pixel probability that a pixel belongs to any object class.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectnessMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ObjectnessMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height} prior values"),
                actual: format!("{}", values.len()),
            });
        }
        let map = ObjectnessMap { width, height, values };
        map.validate()?;
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn validate(&self) -> Result<()> {
        match self.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            Some(i) => Err(Error::InvalidPrior(format!("P at pixel {i} is {}", self.values[i]))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorOptions {
    /// Value for pixels covered by no window.
    #[serde(default)]
    pub uncovered: f64,
}

impl Default for PriorOptions {
    fn default() -> Self {
        PriorOptions { uncovered: 0.0 }
    }
}

fn to_fixed(score: f64) -> i128 {
    (score * FIXED_ONE).round() as i128
}

fn fixed_mean(sum: i128, count: i64) -> f64 {
    (sum as f64 / FIXED_ONE) / count as f64
}

/// Averages window scores per pixel in `O(W*H + #windows)`.
pub fn prior_from_windows(
    windows: &[ScoredWindow],
    width: usize,
    height: usize,
    opts: &PriorOptions,
) -> Result<ObjectnessMap> {
    if !(0.0..=1.0).contains(&opts.uncovered) {
        return Err(Error::InvalidPrior(format!("uncovered fallback {} outside [0,1]", opts.uncovered)));
    }
    let stride = width + 1;
    let mut sum = vec![0i128; stride * (height + 1)];
    let mut count = vec![0i64; stride * (height + 1)];
    for (index, w) in windows.iter().enumerate() {
        w.check(index, width, height)?;
        let [x0, y0, x1, y1] = w.bbox.map(|v| v as usize);
        let q = to_fixed(w.score);
        for (x, y, sign) in [(x0, y0, 1), (x1 + 1, y0, -1), (x0, y1 + 1, -1), (x1 + 1, y1 + 1, 1)] {
            sum[y * stride + x] += sign as i128 * q;
            count[y * stride + x] += sign;
        }
    }
    // Prefix sums turn corner deltas into per-pixel totals.
    for y in 0..=height {
        for x in 0..=width {
            let k = y * stride + x;
            if x > 0 {
                sum[k] += sum[k - 1];
                count[k] += count[k - 1];
            }
            if y > 0 {
                sum[k] += sum[k - stride];
                count[k] += count[k - stride];
            }
            if x > 0 && y > 0 {
                sum[k] -= sum[k - stride - 1];
                count[k] -= count[k - stride - 1];
            }
        }
    }
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let k = y * stride + x;
            values.push(if count[k] == 0 { opts.uncovered } else { fixed_mean(sum[k], count[k]) });
        }
    }
    ObjectnessMap::new(width, height, values)
}

/// Window-size distribution for the scorers, as fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSampling {
    pub min_frac: f64,
    pub max_frac: f64,
}

impl Default for WindowSampling {
    fn default() -> Self {
        WindowSampling { min_frac: 0.1, max_frac: 0.5 }
    }
}

fn sample_boxes(width: usize, height: usize, n: usize, sampling: &WindowSampling, r: &mut rng::Rng) -> Vec<[u32; 4]> {
    let side = |extent: usize, r: &mut rng::Rng| {
        let lo = ((sampling.min_frac * extent as f64).round() as usize).clamp(1, extent);
        let hi = ((sampling.max_frac * extent as f64).round() as usize).clamp(lo, extent);
        r.random_range(lo..=hi)
    };
    (0..n)
        .map(|_| {
            let bw = side(width, r);
            let bh = side(height, r);
            let x0 = r.random_range(0..=width - bw);
            let y0 = r.random_range(0..=height - bh);
            [x0 as u32, y0 as u32, (x0 + bw - 1) as u32, (y0 + bh - 1) as u32]
        })
        .collect()
}

/// Summed-area table with one row and column of zero padding.
struct Integral {
    stride: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(width: usize, height: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let stride = width + 1;
        let mut data = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += value(x, y);
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        Integral { stride, data }
    }

    /// Sum over the inclusive box.
    fn sum(&self, [x0, y0, x1, y1]: [usize; 4]) -> f64 {
        let s = self.stride;
        self.data[(y1 + 1) * s + x1 + 1] - self.data[y0 * s + x1 + 1] - self.data[(y1 + 1) * s + x0]
            + self.data[y0 * s + x0]
    }
}

/// Stand-in objectness model that reads the ground truth: each window scores
/// its fraction of object pixels (IGNORE pixels excluded) plus Gaussian noise,
/// clipped to `[0, 1]`.
pub fn oracle_scorer(
    mask: &LabelMap,
    catalog: &ClassCatalog,
    noise_sd: f64,
    n_windows: usize,
    sampling: &WindowSampling,
    seed: u64,
) -> Result<Vec<ScoredWindow>> {
    if n_windows == 0 {
        return Err(Error::Config("n_windows must be at least 1".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::Config(format!("noise_sd must be non-negative, got {noise_sd}")));
    }
    let (w, h) = (mask.width(), mask.height());
    let objects = Integral::new(w, h, |x, y| catalog.is_object(mask.get(x, y)) as u8 as f64);
    let valid = Integral::new(w, h, |x, y| (mask.get(x, y) != IGNORE) as u8 as f64);
    let mut r = rng::seeded(seed);
    let boxes = sample_boxes(w, h, n_windows, sampling, &mut r);
    let noise = Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
    Ok(boxes
        .into_iter()
        .map(|b| {
            let bb = b.map(|v| v as usize);
            let n_valid = valid.sum(bb);
            let frac = if n_valid > 0.0 { objects.sum(bb) / n_valid } else { 0.0 };
            let eps = if noise_sd > 0.0 { noise.sample(&mut r) } else { 0.0 };
            ScoredWindow { bbox: b, score: (frac + eps).clamp(0.0, 1.0) }
        })
        .collect())
}

/// Image-only scorer: colour contrast between a window and the ring around it
/// (half the window size on each side), normalized to `[0, 1]`.
pub fn heuristic_scorer(
    image: &RgbImage,
    n_windows: usize,
    sampling: &WindowSampling,
    seed: u64,
) -> Result<Vec<ScoredWindow>> {
    if n_windows == 0 {
        return Err(Error::Config("n_windows must be at least 1".into()));
    }
    let mut r = rng::seeded(seed);
    let boxes = sample_boxes(image.width(), image.height(), n_windows, sampling, &mut r);
    heuristic_score_boxes(image, &boxes)
}

/// Ring-contrast score for explicit boxes.
pub fn heuristic_score_boxes(image: &RgbImage, boxes: &[[u32; 4]]) -> Result<Vec<ScoredWindow>> {
    let (w, h) = (image.width(), image.height());
    let channels: Vec<Integral> =
        (0..3).map(|c| Integral::new(w, h, |x, y| image.pixel(x, y)[c] as f64)).collect();
    let max_dist = 255.0 * 3f64.sqrt();
    let area = |[a, b, c, d]: [usize; 4]| ((c - a + 1) * (d - b + 1)) as f64;
    boxes
        .iter()
        .enumerate()
        .map(|(index, &b)| {
            ScoredWindow { bbox: b, score: 0.0 }.check(index, w, h)?;
            let [x0, y0, x1, y1] = b.map(|v| v as usize);
            let (mx, my) = ((x1 - x0).div_ceil(2), (y1 - y0).div_ceil(2));
            let outer = [x0.saturating_sub(mx), y0.saturating_sub(my), (x1 + mx).min(w - 1), (y1 + my).min(h - 1)];
            let inner = [x0, y0, x1, y1];
            let ring_area = area(outer) - area(inner);
            let score = if ring_area <= 0.0 {
                0.0
            } else {
                let d2: f64 = channels
                    .iter()
                    .map(|ch| {
                        let inside = ch.sum(inner) / area(inner);
                        let ring = (ch.sum(outer) - ch.sum(inner)) / ring_area;
                        (inside - ring).powi(2)
                    })
                    .sum();
                (d2.sqrt() / max_dist).clamp(0.0, 1.0)
            };
            Ok(ScoredWindow { bbox: b, score })
        })
        .collect()
}

pub fn windows_to_jsonl(windows: &[ScoredWindow]) -> String {
    let mut out = String::new();
    for w in windows {
        out.push_str(&serde_json::to_string(w).expect("window serializes"));
        out.push('\n');
    }
    out
}

/// Parses one window per non-empty line; boxes must be ordered and scores in `[0, 1]`.
pub fn windows_from_jsonl(text: &str) -> Result<Vec<ScoredWindow>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let w: ScoredWindow = serde_json::from_str(line)?;
        let [x0, y0, x1, y1] = w.bbox;
        if x0 > x1 || y0 > y1 {
            return Err(Error::InvalidPrior(format!("line {}: box {:?} is inverted", lineno + 1, w.bbox)));
        }
        if !(0.0..=1.0).contains(&w.score) {
            return Err(Error::InvalidPrior(format!("line {}: score {} outside [0,1]", lineno + 1, w.score)));
        }
        out.push(w);
    }
    Ok(out)
}
