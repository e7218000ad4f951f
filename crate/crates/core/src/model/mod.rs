//! Desk-scale fully convolutional segmentation network.
//!
//! `conv(3 -> F, k x k, zero pad) -> ReLU -> avg-pool(stride) -> conv(F -> N, 1 x 1)
//! -> bilinear upsample` back to the input resolution.

mod checkpoint;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{init_params, sgd_step, train, InitMode, SgdState, TrainConfig, TrainOutcome, TrainSample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seg::{RgbImage, ScoreMap};

/// Layer dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub features: usize,
    pub kernel: usize,
    pub num_classes: usize,
    pub stride: usize,
}

pub const IN_CHANNELS: usize = 3;

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.num_classes == 0 || self.stride == 0 {
            return Err(Error::Config(format!("degenerate model shape {self:?}")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    pub fn conv1_len(&self) -> usize {
        self.features * IN_CHANNELS * self.kernel * self.kernel
    }

    pub fn conv2_len(&self) -> usize {
        self.num_classes * self.features
    }
}

/// One array per parameter tensor, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// `[feature][channel][ky][kx]`
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    /// `[class][feature]`
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(shape: &ModelShape) -> Self {
        ParamSet {
            conv1_w: vec![0.0; shape.conv1_len()],
            conv1_b: vec![0.0; shape.features],
            conv2_w: vec![0.0; shape.conv2_len()],
            conv2_b: vec![0.0; shape.num_classes],
        }
    }

    /// `(tensor, is_bias)` in declaration order.
    pub fn tensors(&self) -> [(&[f64], bool); 4] {
        [(&self.conv1_w, false), (&self.conv1_b, true), (&self.conv2_w, false), (&self.conv2_b, true)]
    }

    pub fn tensors_mut(&mut self) -> [(&mut Vec<f64>, bool); 4] {
        [
            (&mut self.conv1_w, false),
            (&mut self.conv1_b, true),
            (&mut self.conv2_w, false),
            (&mut self.conv2_b, true),
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(t, _)| t.iter().copied()).collect()
    }

    /// Inverse of [`ParamSet::flatten`] for a set of the same shape.
    pub fn unflatten_like(&self, flat: &[f64]) -> Self {
        let mut out = self.clone();
        let mut off = 0;
        for (t, _) in out.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        out
    }

    pub fn add_scaled(&mut self, other: &ParamSet, weight: f64) {
        for ((a, _), (b, _)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += weight * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(t, _)| t.iter().all(|v| v.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(t, _)| t.iter()).map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub values: ParamSet,
}

/// Planar float image `[channel][y][x]`, bytes mapped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FloatImage {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut data = vec![0.0; IN_CHANNELS * w * h];
        for (p, px) in img.data().chunks(3).enumerate() {
            for c in 0..IN_CHANNELS {
                data[c * w * h + p] = px[c] as f64 / 127.5 - 1.0;
            }
        }
        FloatImage { width: w, height: h, data }
    }

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != IN_CHANNELS * width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("3x{width}x{height} values"),
                actual: format!("{}", data.len()),
            });
        }
        Ok(FloatImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Source taps for bilinear upsampling along one axis: `(lo, hi, frac)` per output coordinate.
fn bilinear_taps(out_len: usize, in_len: usize, stride: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / stride as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Intermediate activations kept for the backward pass.
struct Activations {
    pre: Vec<f64>,
    pooled: Vec<f64>,
    pooled_w: usize,
    pooled_h: usize,
}

fn check_input(shape: &ModelShape, image: &FloatImage) -> Result<()> {
    shape.validate()?;
    if image.width < shape.kernel || image.height < shape.kernel {
        return Err(Error::ImageTooSmall { width: image.width, height: image.height, kernel: shape.kernel });
    }
    Ok(())
}

fn forward_inner(params: &ModelParams, image: &FloatImage) -> Result<(ScoreMap, Activations)> {
    let shape = &params.shape;
    check_input(shape, image)?;
    let p = &params.values;
    let (w, h, k, f_n, n) = (image.width, image.height, shape.kernel, shape.features, shape.num_classes);
    let pad = (k / 2) as isize;
    let plane = w * h;

    let mut pre = vec![0.0; f_n * plane];
    for f in 0..f_n {
        let out = &mut pre[f * plane..(f + 1) * plane];
        out.fill(p.conv1_b[f]);
        for c in 0..IN_CHANNELS {
            let src = &image.data[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wt = p.conv1_w[((f * IN_CHANNELS + c) * k + ky) * k + kx];
                    if wt == 0.0 {
                        continue;
                    }
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    let (x_lo, x_hi) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                        let orow = &mut out[y * w..(y + 1) * w];
                        for x in x_lo..x_hi {
                            orow[x] += wt * srow[(x as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }

    let s = shape.stride;
    let (pw, ph) = (w.div_ceil(s), h.div_ceil(s));
    let mut pooled = vec![0.0; f_n * pw * ph];
    for f in 0..f_n {
        for py in 0..ph {
            for px in 0..pw {
                let (y0, y1) = (py * s, ((py + 1) * s).min(h));
                let (x0, x1) = (px * s, ((px + 1) * s).min(w));
                let mut acc = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += pre[f * plane + y * w + x].max(0.0);
                    }
                }
                pooled[(f * ph + py) * pw + px] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }

    let pplane = pw * ph;
    let mut low = vec![0.0; n * pplane];
    for c in 0..n {
        let out = &mut low[c * pplane..(c + 1) * pplane];
        out.fill(p.conv2_b[c]);
        for f in 0..f_n {
            let wt = p.conv2_w[c * f_n + f];
            if wt == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&pooled[f * pplane..(f + 1) * pplane]) {
                *o += wt * v;
            }
        }
    }

    let xt = bilinear_taps(w, pw, s);
    let yt = bilinear_taps(h, ph, s);
    let mut scores = vec![0.0; plane * n];
    for (y, &(y0, y1, fy)) in yt.iter().enumerate() {
        for (x, &(x0, x1, fx)) in xt.iter().enumerate() {
            let dst = &mut scores[(y * w + x) * n..(y * w + x + 1) * n];
            for (c, d) in dst.iter_mut().enumerate() {
                let l = &low[c * pplane..];
                let top = l[y0 * pw + x0] + fx * (l[y0 * pw + x1] - l[y0 * pw + x0]);
                let bottom = l[y1 * pw + x0] + fx * (l[y1 * pw + x1] - l[y1 * pw + x0]);
                *d = top + fy * (bottom - top);
            }
        }
    }
    let scores = ScoreMap::new(w, h, n, scores)?;
    Ok((scores, Activations { pre, pooled, pooled_w: pw, pooled_h: ph }))
}

/// Score map for one image.
pub fn forward(params: &ModelParams, image: &FloatImage) -> Result<ScoreMap> {
    forward_inner(params, image).map(|(s, _)| s)
}

/// Whether each hidden unit passes its ReLU, laid out `[feature][y][x]`. The
/// network is smooth only while this pattern holds, so finite-difference
/// checks skip perturbations that change it.
pub fn active_units(params: &ModelParams, image: &FloatImage) -> Result<Vec<bool>> {
    forward_inner(params, image).map(|(_, a)| a.pre.iter().map(|&v| v > 0.0).collect())
}

/// Forward pass followed by backpropagation of `loss_grad` (laid out like the score map).
pub fn forward_backward(
    params: &ModelParams,
    image: &FloatImage,
    loss_grad: impl FnOnce(&ScoreMap) -> Result<(f64, Vec<f64>)>,
) -> Result<(f64, ParamSet)> {
    let (scores, acts) = forward_inner(params, image)?;
    let (value, grad) = loss_grad(&scores)?;
    let grads = backward_inner(params, image, &acts, &grad)?;
    Ok((value, grads))
}

/// Gradients of `sum(loss_grad * scores)` with respect to every parameter.
pub fn backward(params: &ModelParams, image: &FloatImage, loss_grad: &[f64]) -> Result<ParamSet> {
    let (_, acts) = forward_inner(params, image)?;
    backward_inner(params, image, &acts, loss_grad)
}

fn backward_inner(params: &ModelParams, image: &FloatImage, acts: &Activations, g: &[f64]) -> Result<ParamSet> {
    let shape = &params.shape;
    let p = &params.values;
    let (w, h, k, f_n, n, s) =
        (image.width, image.height, shape.kernel, shape.features, shape.num_classes, shape.stride);
    let plane = w * h;
    if g.len() != plane * n {
        return Err(Error::ShapeMismatch {
            expected: format!("{w}x{h}x{n} gradient"),
            actual: format!("{} values", g.len()),
        });
    }
    let (pw, ph) = (acts.pooled_w, acts.pooled_h);
    let pplane = pw * ph;
    let mut out = ParamSet::zeros(shape);

    // Transpose of the bilinear upsample.
    let xt = bilinear_taps(w, pw, s);
    let yt = bilinear_taps(h, ph, s);
    let mut dlow = vec![0.0; n * pplane];
    for (y, &(y0, y1, fy)) in yt.iter().enumerate() {
        for (x, &(x0, x1, fx)) in xt.iter().enumerate() {
            let src = &g[(y * w + x) * n..(y * w + x + 1) * n];
            for (c, &gv) in src.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                let d = &mut dlow[c * pplane..(c + 1) * pplane];
                let top = gv * (1.0 - fy);
                let bottom = gv * fy;
                d[y0 * pw + x0] += top * (1.0 - fx);
                d[y0 * pw + x1] += top * fx;
                d[y1 * pw + x0] += bottom * (1.0 - fx);
                d[y1 * pw + x1] += bottom * fx;
            }
        }
    }

    let mut dpooled = vec![0.0; f_n * pplane];
    for c in 0..n {
        let dl = &dlow[c * pplane..(c + 1) * pplane];
        out.conv2_b[c] = dl.iter().sum();
        for f in 0..f_n {
            let pooled = &acts.pooled[f * pplane..(f + 1) * pplane];
            out.conv2_w[c * f_n + f] = dl.iter().zip(pooled).map(|(a, b)| a * b).sum();
            let wt = p.conv2_w[c * f_n + f];
            if wt != 0.0 {
                for (d, &v) in dpooled[f * pplane..(f + 1) * pplane].iter_mut().zip(dl) {
                    *d += wt * v;
                }
            }
        }
    }

    // Through the average pool and ReLU (zero subgradient at 0).
    let mut dpre = vec![0.0; f_n * plane];
    for f in 0..f_n {
        for py in 0..ph {
            for px in 0..pw {
                let (y0, y1) = (py * s, ((py + 1) * s).min(h));
                let (x0, x1) = (px * s, ((px + 1) * s).min(w));
                let share = dpooled[(f * ph + py) * pw + px] / ((y1 - y0) * (x1 - x0)) as f64;
                if share == 0.0 {
                    continue;
                }
                for y in y0..y1 {
                    for x in x0..x1 {
                        let i = f * plane + y * w + x;
                        if acts.pre[i] > 0.0 {
                            dpre[i] = share;
                        }
                    }
                }
            }
        }
    }

    let pad = (k / 2) as isize;
    for f in 0..f_n {
        let d = &dpre[f * plane..(f + 1) * plane];
        out.conv1_b[f] = d.iter().sum();
        for c in 0..IN_CHANNELS {
            let src = &image.data[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    let (x_lo, x_hi) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                    let mut acc = 0.0;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                        let drow = &d[y * w..(y + 1) * w];
                        for x in x_lo..x_hi {
                            acc += drow[x] * srow[(x as isize + dx) as usize];
                        }
                    }
                    out.conv1_w[((f * IN_CHANNELS + c) * k + ky) * k + kx] = acc;
                }
            }
        }
    }
    Ok(out)
}
