use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::seg::{ClassCatalog, LabelMap};

/// A 4-connected component of one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub class: u8,
    pub pixels: Vec<usize>,
    /// Tight box `[x0, y0, x1, y1]`, inclusive.
    pub bbox: [usize; 4],
    pub centroid: (f64, f64),
}

impl Instance {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn box_contains(&self, x: usize, y: usize) -> bool {
        x >= self.bbox[0] && x <= self.bbox[2] && y >= self.bbox[1] && y <= self.bbox[3]
    }
}

/// Object instances in scan order of their first pixel.
pub fn find_instances(mask: &LabelMap, catalog: &ClassCatalog) -> Vec<Instance> {
    let (w, h) = (mask.width(), mask.height());
    let labels = mask.labels();
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        let class = labels[start];
        if seen[start] || !catalog.is_object(class) {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if !seen[j] && labels[j] == class {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        pixels.sort_unstable();
        let mut bbox = [usize::MAX, usize::MAX, 0, 0];
        let (mut sx, mut sy) = (0.0, 0.0);
        for &i in &pixels {
            let (x, y) = (i % w, i / w);
            bbox = [bbox[0].min(x), bbox[1].min(y), bbox[2].max(x), bbox[3].max(y)];
            sx += x as f64;
            sy += y as f64;
        }
        let n = pixels.len() as f64;
        out.push(Instance { class, pixels, bbox, centroid: (sx / n, sy / n) });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seg::IGNORE;

    #[test]
    fn components_are_four_connected() {
        #[rustfmt::skip]
        let labels = vec![
            1, 0, 1,
            0, 1, 0,
            1, 1, IGNORE,
        ];
        let mask = LabelMap::new(3, 3, labels).unwrap();
        let inst = find_instances(&mask, &ClassCatalog::with_background(1).unwrap());
        assert_eq!(inst.len(), 3);
        assert_eq!(inst[0].pixels, vec![0]);
        assert_eq!(inst[1].pixels, vec![2]);
        assert_eq!(inst[2].pixels, vec![4, 6, 7]);
        assert_eq!(inst[2].bbox, [0, 1, 1, 2]);
        assert!((inst[2].centroid.0 - 2.0 / 3.0).abs() < 1e-12);
        assert!(inst[2].box_contains(0, 1) && !inst[2].box_contains(2, 2));
    }
}
